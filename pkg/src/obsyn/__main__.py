import sys

from obsyn.cli import main

sys.exit(main())
