import sys
from pathlib import Path

# allow running pytest from a fresh checkout: tests/ for the oracles module,
# src/ so the package resolves without an install
sys.path.insert(0, str(Path(__file__).parent))
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
