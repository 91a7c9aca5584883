"""neurosem: spectral-element flow solver with neural-network data assimilation.

The package couples two halves:

* a 2D continuous-Galerkin spectral-element solver for the incompressible
  Navier-Stokes / advection-diffusion (Boussinesq) system, marched with a
  stiffly-stable velocity-correction splitting scheme, and
* physics-informed neural networks trained on scattered (possibly noisy)
  velocity/temperature measurements, whose trained surrogates feed back into
  the solver as body forces, advection fields, or excised-subdomain boundary
  conditions.
"""

__version__ = "0.1.0"


def _tune_allocator() -> None:
    """Keep multi-MB numpy temporaries on the heap across iterations.

    Training and time-stepping loops release and reallocate the same
    few-megabyte scratch arrays every step; with glibc defaults those go
    through mmap/munmap round-trips and the page faults dominate the
    elementwise work.  Raising the thresholds lets freed blocks be reused.
    """
    import ctypes

    try:
        libc = ctypes.CDLL(None)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()
