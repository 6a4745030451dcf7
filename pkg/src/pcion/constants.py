"""Physical constants and unit conventions.

All photon energies are carried in eV and all lengths in nm.  Wavevectors
cross between the two systems only through HBARC_EV_NM, so every k <-> omega
conversion happens at a single, explicit point.
"""

# hbar * c in eV * nm (CODATA 2018)
HBARC_EV_NM = 197.3269804

# fine-structure constant (CODATA 2018)
ALPHA = 7.2973525693e-3
