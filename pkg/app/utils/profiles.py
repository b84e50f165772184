"""Named hardware profiles layered under scenario config files."""
from typing import Any, Dict

from app.schemas import solve_blocks_per_plane

MIB = 1 << 20
GIB = 1 << 30

PAGES_PER_BLOCK = 392
PAGE_SIZE = 8192


def _geometry(capacity_bytes: int, channels: int, packages: int, dies: int) -> Dict[str, int]:
    return {
        "channels": channels,
        "packages_per_channel": packages,
        "dies_per_package": dies,
        "planes_per_die": 2,
        "pages_per_block": PAGES_PER_BLOCK,
        "page_size": PAGE_SIZE,
        "blocks_per_plane": solve_blocks_per_plane(
            capacity_bytes, channels, packages, dies, 2, PAGES_PER_BLOCK, PAGE_SIZE
        ),
    }


PROFILES: Dict[str, Dict[str, Any]] = {
    # Scaled-down device for quick runs
    "desk": {
        "flash": {"geometry": _geometry(8 * GIB, 2, 2, 2)},
        "buffer": {"capacity_bytes": 64 * MIB},
        "host": {"memory_bytes": 1 * GIB},
    },
    # Full-size 800 GB device of the reference configuration
    "table1": {
        "flash": {"geometry": _geometry(800 * 10**9, 16, 4, 2)},
        "buffer": {"capacity_bytes": 512 * MIB},
        "host": {"memory_bytes": 4 * GIB},
    },
}


PROFILE_ALIASES: Dict[str, str] = {"full": "table1"}


def canonical_profile(name: str) -> str:
    """Profile name with case, padding and aliases resolved."""
    key = name.strip().lower()
    return PROFILE_ALIASES.get(key, key)


def get_profile(name: str) -> Dict[str, Any]:
    """
    Config overlay for a named profile.

    Raises:
        KeyError: If the profile is unknown
    """
    return PROFILES[canonical_profile(name)]


def get_all_profiles() -> list[str]:
    """Accepted profile names, aliases included."""
    return list(PROFILES) + list(PROFILE_ALIASES)
