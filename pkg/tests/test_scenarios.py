import numpy as np
import pytest

from bonefrac.materials import SCREW
from bonefrac.mesh import YMAX, ZMIN
from bonefrac.scenarios import (
    LoadProgram,
    ScenarioError,
    build_sent,
    build_vertebra_analog,
)


class TestBuildSent:
    def test_zero_displacement_zero_reaction(self):
        from bonefrac.solvers import SolverConfig, run_load_program

        mesh, mat, prog = build_sent("tension", resolution=4, n_steps=2, u_max=0.0)
        reports, _ = run_load_program(mesh, mat, prog, SolverConfig())
        assert all(r.reaction == pytest.approx(0.0, abs=1e-12) for r in reports)

    def test_notch_seam_held_at_one(self):
        mesh, _, prog = build_sent("tension", resolution=8)
        bcs = prog.step_bcs(1)
        seam = bcs.phase_dirichlet.dofs
        assert seam.size > 0
        coords = mesh.node_coords[seam]
        assert (np.abs(coords[:, 2] - 0.5) < 1e-9).all()
        assert (coords[:, 0] <= 0.5 + 1e-9).all()
        np.testing.assert_allclose(bcs.phase_dirichlet.values, 1.0)
        assert prog.initial_damage is not None
        assert prog.initial_damage.max() == pytest.approx(1.0)

    def test_tension_and_shear_differ_in_pulled_component(self):
        mesh_t, _, prog_t = build_sent("tension", resolution=4)
        mesh_s, _, prog_s = build_sent("shear", resolution=4)
        np.testing.assert_allclose(prog_t.reaction_direction, [0, 0, 1])
        np.testing.assert_allclose(prog_s.reaction_direction, [1, 0, 0])
        # prescribed displacement lives on the pulled component
        top = mesh_t.facet_nodes(6)  # ZMAX tag
        bc_t = prog_t.step_bcs(prog_t.n_steps)
        vals_t = dict(zip(bc_t.dirichlet.dofs.tolist(), bc_t.dirichlet.values))
        assert any(vals_t.get(3 * n + 2, 0.0) > 0 for n in top)
        bc_s = prog_s.step_bcs(prog_s.n_steps)
        vals_s = dict(zip(bc_s.dirichlet.dofs.tolist(), bc_s.dirichlet.values))
        assert any(vals_s.get(3 * n + 0, 0.0) > 0 for n in top)

    def test_notch_too_long_rejected(self):
        with pytest.raises(ScenarioError, match="notch"):
            build_sent("tension", resolution=8, notch_length=0.7)

    def test_odd_resolution_rejected(self):
        with pytest.raises(ScenarioError, match="even"):
            build_sent("tension", resolution=7)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ScenarioError):
            build_sent("torsion")


class TestBuildVertebraAnalog:
    def test_neutral_angles_mirror_symmetric_axes(self):
        from bonefrac.scenarios import _screw_axes

        left, right = _screw_axes((0.0, 0.0), (50.0, 50.0, 30.0), 10.0, 0.6)
        # parallel axes, entry points and directions reflecting about the
        # mid-sagittal plane x = 25
        np.testing.assert_allclose(left.direction, right.direction, atol=1e-12)
        np.testing.assert_allclose(50.0 - left.start[0], right.start[0], atol=1e-12)
        np.testing.assert_allclose(left.start[1:], right.start[1:], atol=1e-12)
        assert left.direction[0] == pytest.approx(0.0, abs=1e-15)

    def test_tilted_angles_mirror_symmetric_axes(self):
        from bonefrac.scenarios import _screw_axes

        left, right = _screw_axes((-5.0, 5.0), (50.0, 50.0, 30.0), 10.0, 0.6)
        np.testing.assert_allclose(-left.direction[0], right.direction[0], atol=1e-12)
        np.testing.assert_allclose(left.direction[1:], right.direction[1:], atol=1e-12)
        np.testing.assert_allclose(50.0 - left.start[0], right.start[0], atol=1e-12)

    def test_flexion_extension_only_differ_in_sign(self):
        _, _, flex = build_vertebra_analog(motion="flexion", divisions=(8, 8, 5))
        _, _, ext = build_vertebra_analog(motion="extension", divisions=(8, 8, 5))
        for n in range(1, flex.n_steps + 1):
            df = flex.step_bcs(n).f_ext - flex.step_bcs(0).f_ext
            de = ext.step_bcs(n).f_ext - ext.step_bcs(0).f_ext
            # remove the shared compressive preload before comparing
            pre_f = flex.step_bcs(1).f_ext - (flex.step_bcs(2).f_ext - flex.step_bcs(1).f_ext)
            pre_e = ext.step_bcs(1).f_ext - (ext.step_bcs(2).f_ext - ext.step_bcs(1).f_ext)
            np.testing.assert_allclose(df - pre_f, -(de - pre_e), atol=1e-12)

    def test_torsion_pure_couple(self):
        mesh, _, prog = build_vertebra_analog(motion="torsion_ccw", divisions=(8, 8, 5))
        inc = prog.step_bcs(2).f_ext - prog.step_bcs(1).f_ext
        f3 = inc.reshape(-1, 3)
        np.testing.assert_allclose(f3.sum(axis=0), 0.0, atol=1e-10)
        rel = mesh.node_coords - np.array([25.0, 25.0, 0.0])
        moment_z = np.sum(rel[:, 0] * f3[:, 1] - rel[:, 1] * f3[:, 0])
        assert abs(moment_z) > 1.0
        # tangential: no axial or radial components
        loaded = np.abs(f3).sum(axis=1) > 0
        assert (f3[loaded][:, 2] == 0.0).all()
        radial = rel[loaded][:, :2]
        radial = radial / np.linalg.norm(radial, axis=1, keepdims=True)
        dots = np.einsum("ij,ij->i", f3[loaded][:, :2], radial)
        assert np.abs(dots).max() < 1e-10

    def test_preload_constant_on_superior_face(self):
        mesh, _, prog = build_vertebra_analog(divisions=(8, 8, 5), F_v=5.0)
        for n in (1, prog.n_steps):
            f3 = prog.step_bcs(n).f_ext.reshape(-1, 3)
            superior = mesh.facet_nodes(6)  # ZMAX
            assert f3[superior, 2].sum() == pytest.approx(-5.0, rel=1e-12)

    def test_inferior_face_fully_fixed(self):
        mesh, _, prog = build_vertebra_analog(divisions=(8, 8, 5))
        inferior = mesh.facet_nodes(ZMIN)
        bc = prog.step_bcs(1).dirichlet
        fixed = set(bc.dofs.tolist())
        for n in inferior:
            for c in range(3):
                assert 3 * n + c in fixed
        np.testing.assert_allclose(bc.values, 0.0)

    def test_angle_out_of_range_rejected(self):
        with pytest.raises(ScenarioError, match="angles"):
            build_vertebra_analog(alpha=(20.0, 0.0))

    def test_screw_exit_detected(self):
        with pytest.raises(ScenarioError, match="exits"):
            build_vertebra_analog(alpha=(14.0, 14.0), block=(30.0, 50.0, 30.0),
                                  divisions=(6, 10, 6), pedicle_offset=8.0)

    def test_bad_motion_rejected(self):
        with pytest.raises(ScenarioError):
            build_vertebra_analog(motion="lateral_bending")

    def test_load_factor_schedule(self):
        _, _, prog = build_vertebra_analog(divisions=(8, 8, 5), n_steps=10,
                                           force_step_fraction=0.1)
        assert prog.load_factor(0) == 0.0
        assert prog.load_factor(10) == pytest.approx(1.0)
