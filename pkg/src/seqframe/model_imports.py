"""Imports every bundled configuration so that it registers itself."""

import seqframe.tasks.toy.params.copy  # noqa: F401
import seqframe.tasks.toy.params.multi  # noqa: F401
