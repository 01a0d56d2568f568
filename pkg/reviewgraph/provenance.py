#!/usr/bin/env python
"""
provenance.py: Configuration fingerprints embedded in every output.

The fingerprint is the first 16 hex digits of the SHA-256 of the canonical
JSON form of the run configuration, leaving out file locations, so the same
settings give the same fingerprint wherever the run happens.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from reviewgraph.exceptions import FingerprintMismatchError
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)

FINGERPRINT_LENGTH = 16
EXCLUDED_SECTIONS = ("paths",)


def fingerprint_dict(settings: Dict[str, Any]) -> str:
    canonical = {k: v for k, v in settings.items() if k not in EXCLUDED_SECTIONS}
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:FINGERPRINT_LENGTH]


def fingerprint_comment(fingerprint: str) -> str:
    return f"# fingerprint={fingerprint}\n"


def read_tsv_fingerprint(path: Union[str, Path]) -> Optional[str]:
    """Fingerprint from the leading comment line of a TSV output, if any."""
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline().strip()
    if first.startswith("# fingerprint="):
        return first.split("=", 1)[1]
    return None


def check_fingerprint(
    expected: str, found: Optional[str], source: Any, force: bool = False
) -> None:
    """Compares an artifact fingerprint with the current configuration.

    Raises:
        FingerprintMismatchError: If they differ and ``force`` is not set.
    """
    if found == expected:
        return
    message = f"{source} has fingerprint {found}, current configuration is {expected}"
    if force:
        logger.warning("%s (continuing because of --force)", message)
        return
    raise FingerprintMismatchError(message + "; rerun the stage or pass --force")
