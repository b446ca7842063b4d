from .simulator import CrowdSimulator, SimulationResult, run
