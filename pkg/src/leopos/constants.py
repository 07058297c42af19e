"""Physical constants shared across the simulator (SI units)."""

import math

C_LIGHT = 299_792_458.0
MU_EARTH = 3.986004418e14
R_EARTH = 6371e3
OMEGA_EARTH = 7.2921159e-5
K_BOLTZMANN = 1.380649e-23

DEG = math.pi / 180.0
