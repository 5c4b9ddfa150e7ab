"""
Resource sampling for experiment runs.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional

import psutil


@dataclass
class ResourceSample:
    """Process resources at one point in time."""

    label: str
    rss_mb: float
    cpu_user_s: float
    cpu_system_s: float
    wall_s: float
    timestamp: str


class ResourceMonitor:
    """Samples the current process at job milestones."""

    def __init__(self, pid: Optional[int] = None):
        self.process = psutil.Process(pid or os.getpid())
        self.start_time = time.perf_counter()
        self.samples: List[ResourceSample] = []

    def sample(self, label: str) -> ResourceSample:
        cpu = self.process.cpu_times()
        sample = ResourceSample(
            label=label,
            rss_mb=self.process.memory_info().rss / 1024 / 1024,
            cpu_user_s=cpu.user,
            cpu_system_s=cpu.system,
            wall_s=time.perf_counter() - self.start_time,
            timestamp=datetime.now().isoformat(),
        )
        self.samples.append(sample)
        return sample

    def summary(self) -> Dict[str, Any]:
        if not self.samples:
            return {}
        first, last = self.samples[0], self.samples[-1]
        return {
            "samples": [asdict(s) for s in self.samples],
            "peak_rss_mb": max(s.rss_mb for s in self.samples),
            "cpu_seconds": (last.cpu_user_s + last.cpu_system_s) - (first.cpu_user_s + first.cpu_system_s),
            "wall_seconds": last.wall_s - first.wall_s,
        }


def system_info() -> Dict[str, Any]:
    memory = psutil.virtual_memory()
    return {
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_total_mb": memory.total / 1024 / 1024,
    }
