import sys

from stochlab.cli import main

sys.exit(main())
