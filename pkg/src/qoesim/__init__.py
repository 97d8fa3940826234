"""qoesim: QoE-driven network slicing and orchestration simulator.

A seedable, deterministic video-streaming network simulator with a
two-level digital-agent control plane: per-user agents learn QoE models
and orchestrate radio/compute resources; a network-level agent sizes and
adjusts slices.  Benchmark strategies and an experiment harness reproduce
comparative ELA/QoE studies.
"""

__version__ = "0.1.0"
