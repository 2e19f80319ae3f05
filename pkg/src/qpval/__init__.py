"""Valuation of hybrid insurance-finance contracts under the QP-rule.

Modules
-------
finite_space     exact probability calculus, martingale polytopes, superhedging
stopping_times   doubly stochastic random times and copula-coupled pairs
affine_engine    Gaussian affine factor model and backward pricing recursions
montecarlo       simulation oracles under the composed measure
products         surrender option, variable annuity, scheduled premiums, risk margin
arbitrage        insurance-finance arbitrage checks and constructions
cli              command-line interface
"""

__version__ = "0.1.0"
