"""ude: a desk-scale unified motion generation engine.

One shared model maps text prompts or audio feature sequences to discrete
motion tokens and decodes them to motion, either deterministically through
the quantizer decoder or stochastically through a diffusion decoder.
"""

__version__ = "0.1.0"
