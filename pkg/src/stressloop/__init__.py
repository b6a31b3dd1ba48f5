"""stressloop: a seedable workbench for context-aware active-learning
personalization of a physiological stress classifier on synthetic subjects.

Subpackages cover the full loop: HRV feature extraction, a tree-ensemble
detector, the query reward and agent state, a deep Q-learning query agent,
synthetic subject generation, the closed-loop experiment harness, and a
queueing model of the serving pipeline.
"""

__version__ = "0.1.0"

from . import dqn, forest, harness, hrv, pipeline, reward, state, subjects  # noqa: E402,F401
