"""
Configuration package for adaptorx
"""

from .settings import *
from .experiment import ExperimentConfig, ObjectiveSpec
