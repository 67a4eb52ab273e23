import sys
from pathlib import Path

# Get the absolute path to the project root directory
project_root = Path(__file__).parent.absolute()

# Make `src` importable when run from a checkout
sys.path.insert(0, str(project_root))

from src.cli import main

if __name__ == "__main__":
    main()
