"""Task-oriented grasp filtering with pick and place clearance on signed distance fields."""

__version__ = "0.1.0"
