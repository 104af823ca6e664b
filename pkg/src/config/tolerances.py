# src/config/tolerances.py

from typing import List

from src.core.models import Dtype, DtypeTolerance


class DtypeTolerances:
    """default numerical-correctness band per output dtype: atol + rtol*|y_ref|"""
    FP32 = DtypeTolerance(dtype=Dtype.FP32, atol=1e-5, rtol=1e-3)

    FP16 = DtypeTolerance(dtype=Dtype.FP16, atol=1e-2, rtol=1e-2)

    BF16 = DtypeTolerance(dtype=Dtype.BF16, atol=1e-2, rtol=1e-2)

    FP8_E4M3 = DtypeTolerance(dtype=Dtype.FP8_E4M3, atol=0.125, rtol=0.125)

    # e5m2 keeps fewer mantissa bits, so rtol is widened
    FP8_E5M2 = DtypeTolerance(dtype=Dtype.FP8_E5M2, atol=0.125, rtol=0.25)

    @classmethod
    def get_all(cls) -> List[DtypeTolerance]:
        return [value for name, value in vars(cls).items()
                if isinstance(value, DtypeTolerance)]

    @classmethod
    def for_dtype(cls, dtype: Dtype) -> DtypeTolerance:
        for tol in cls.get_all():
            if tol.dtype is Dtype(dtype):
                return tol
        raise KeyError(f"no default tolerance for dtype: {dtype}")
