"""
Secure federated learning simulator.

Devices train locally, perturb their updates with (epsilon, delta)-LDP and
submit them to a smart contract on a simulated ledger, where miners score
each update against a threshold before it is averaged into the global model.
"""

from __future__ import annotations

import json
from pathlib import Path

__version__: str = json.loads(
    (Path(__file__).parent / "manifest.json").read_text(encoding="utf-8")
)["version"]
