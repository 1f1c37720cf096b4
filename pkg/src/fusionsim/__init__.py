"""fusionsim: deterministic multi-agent camera-radar fusion testbed.

Three pipeline modes share one reusable perception/tracking core:

* ``cr``      local camera-radar late fusion
* ``cr-covi`` plus collaborative V2V/V2I track sharing (covariance intersection)
* ``cr-dist`` plus edge-offloaded perception with rollback-replay integration

Everything is driven by a seeded discrete-event loop; identical inputs give
byte-identical outputs.
"""

__version__ = "0.1.0"

from .geometry import CameraIntrinsics, Pose  # noqa: F401
