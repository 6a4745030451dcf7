"""Photonic-crystal correction to the electron electromagnetic mass and the
resulting shifts of atomic ionization energies, for 1D layered crystals."""

from .constants import ALPHA, HBARC_EV_NM
from .materials import (
    ConstantIndex,
    MaterialError,
    MetamaterialSpec,
    SellmeierTail,
    TabulatedIndex,
    build_effective_model,
    eval_index,
    load_index_table,
    mean_index,
    sellmeier_c1,
)
from .bloch import (
    TE,
    TM,
    BlochError,
    ConvergenceError,
    DegenerateModeError,
    KPoint,
    ModeProfile,
    Stack1D,
    count_bands,
    dispersion_residual,
    fourier_coefficients,
    mode_profile,
    reconstruct_field,
    solve_bands,
)
from .qed_mass import (
    CutoffConfig,
    ElectronDirection,
    MassCoefficients,
    MassComputationError,
    compute_AB,
    cross_term_residual,
    delta_m,
    estimate_mass_correction,
    he_tail,
)
from .ionization import (
    AtomRecord,
    IonizationError,
    IonizationReport,
    OrbitalState,
    angular_average,
    delta_m_min,
    delta_m_state,
    ionization_shift,
    load_atoms,
    shifted_table,
)

__version__ = "0.1.0"
