from lifejournal.cli import main
import sys

sys.exit(main())
