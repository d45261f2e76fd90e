import sys
from pathlib import Path

# allow test modules to import sibling helper modules
sys.path.insert(0, str(Path(__file__).parent))
