# This file makes the src directory a Python package
# allowing imports like 'from src.config import load_config'
