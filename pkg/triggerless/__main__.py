import sys

from triggerless.app import main

sys.exit(main())
