"""
What to do if the module is called like this: python -m couponcli
"""

from .couponcli import run

run()
