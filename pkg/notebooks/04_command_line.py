# %% [markdown]
# # Batch runs and what breaks them
#
# The command line wraps the same pipeline, writes CSV/JSON artifacts and a
# manifest with SHA-256 digests, and maps failures to exit codes: 2 for a
# configuration that violates a precondition, 3 for a numerical tolerance
# that is not met.

# %%
import json
import tempfile
from pathlib import Path

from gevrey_witness.cli import main

tmp = Path(tempfile.mkdtemp())

# %%
print("exit", main(["all", "--q", "3", "--a", "2", "--out", str(tmp / "q3a2")]))
m = json.loads((tmp / "q3a2" / "manifest.json").read_text())
print(sorted(m["artifacts"]))
print(m["warnings"])

# %% [markdown]
# The two warnings say the deepest levels use nearly all 32 oscillator
# modes.  Nothing fails, but raising `K_modes` is the first knob if `J` goes up.
#
# A bad configuration is rejected before any work starts:

# %%
print("exit", main(["spectrum", "--q", "1", "--out", str(tmp / "bad")]))

# %% [markdown]
# Moving the cutoffs to `R0 = 0.1` puts the first levels where the
# series is not asymptotic.  The transport residual check catches it and
# says what to change.

# %%
print("exit", main(["witness", "--r0", "0.1", "--out", str(tmp / "r0")]))
