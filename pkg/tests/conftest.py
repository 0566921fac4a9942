import os
import sys
import warnings

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=UserWarning, module="cutflow")
