import sys

from rgbm.cli import main

sys.exit(main())
