"""Scene builders shared by the tests."""

import numpy as np

from ringhough import synth


def ring_image(cx, cy, r, w=128, h=128, **ring):
    spec = synth.SceneSpec(w, h, (synth.RingSpec(cx, cy, r, **ring),))
    return synth.render_scene(spec)[0]


def plain_ring_image(cx, cy, r, w=128, h=128, width=2.0):
    """Outer ring only: no inner rings and no central spot."""
    return ring_image(cx, cy, r, w, h, ring_width=width, inner_rings=0, spot_amplitude=0.0)


def two_particles():
    """Two overlapping particles with inner rings and central spots."""
    spec = synth.SceneSpec(160, 128, (synth.RingSpec(60, 64, 24), synth.RingSpec(95, 64, 20)))
    return synth.render_scene(spec)
