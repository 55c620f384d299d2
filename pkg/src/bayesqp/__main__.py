import sys

from bayesqp.cli import main

sys.exit(main())
