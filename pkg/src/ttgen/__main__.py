import sys

from ttgen.cli import main

sys.exit(main())
