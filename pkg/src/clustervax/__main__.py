import sys

from clustervax.cli import main

sys.exit(main())
