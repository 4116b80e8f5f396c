import sys

from doccat.cli import main

sys.exit(main())
