import sys

from unsupmap.cli import main

sys.exit(main())
