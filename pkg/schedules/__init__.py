"""
Schedules package for adaptorx: objective sampling and stopping strategies
"""

from .base import Schedule, ScheduleState, DatasetCursor
from .strategies import ParallelSchedule, SequentialSchedule
