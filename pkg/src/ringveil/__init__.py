"""Token-ring device scheduling with time-lock-verified actuation delays.

Devices on a shared hub circulate a constant-size encrypted token.  Actuation
commands ride inside the token as time-lock puzzles whose forced sequential
work enforces the owner's ordering constraints, and the constant circulation
rate hides which devices are active from a passive channel observer.
"""

__version__ = "0.1.0"
