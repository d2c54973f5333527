__version__ = "0.1.0"

CANVAS_CELLS = 200
CRUISE_SPEED = 5.0  # m/s
FOOTPRINT_GRID = (20, 10)  # samples along length, width
MAX_WHEEL_ANGLE = 0.6108652381980153  # 35 degrees
SHOULDER_WIDTH = 1.5  # m
VEHICLE_LENGTH = 4.5  # m
VEHICLE_MASS = 1500.0  # kg
VEHICLE_WIDTH = 2.0  # m
WHEELBASE = 2.7  # m
