import sys

from psaddle.cli import main

sys.exit(main())
