"""manip2d: a planar manipulation RL laboratory.

Side-view 2D world (gravity along -y, table at y = 0) with a 3-link arm and
parallel-jaw gripper. Ships diverse-reset dataset generation, a task-agnostic
reward, large-batch PPO with an asymmetric critic and state-dependent
exploration noise, an operational-space torque controller, actuator system
identification, domain randomization, and teacher-student distillation.
"""

__version__ = "0.1.0"
