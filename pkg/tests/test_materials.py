import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonefrac.materials import (
    CORTICAL,
    SCREW,
    TRABECULAR,
    MaterialError,
    ScrewCylinder,
    VertebraAnalogSpec,
    assign_vertebra_analog,
    gc_power_law,
    homogeneous_field,
    lame_constants,
    length_scale,
    read_material_csv,
    write_material_csv,
)
from bonefrac.mesh import generate_box_tet_mesh


class TestLameConstants:
    def test_zero_poisson(self):
        lam, mu = lame_constants(1.0, 0.0)
        assert lam == 0.0
        assert mu == 0.5

    def test_titanium(self):
        lam, mu = lame_constants(110000.0, 0.4)
        assert lam == pytest.approx(157142.857142857, rel=1e-9)
        assert mu == pytest.approx(39285.714285714, rel=1e-9)

    def test_cortical_bone(self):
        lam, mu = lame_constants(14000.0, 0.3)
        assert lam == pytest.approx(8076.923076923, rel=1e-9)
        assert mu == pytest.approx(5384.615384615, rel=1e-9)

    def test_incompressible_rejected(self):
        with pytest.raises(MaterialError):
            lame_constants(1000.0, 0.5)
        with pytest.raises(MaterialError):
            lame_constants(-5.0, 0.3)

    @given(
        E=st.floats(min_value=1e-2, max_value=1e6),
        nu=st.floats(min_value=-0.9, max_value=0.49),
    )
    @settings(max_examples=200, deadline=None)
    def test_inverse_roundtrip(self, E, nu):
        lam, mu = lame_constants(E, nu)
        e_back = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
        assert e_back == pytest.approx(E, rel=1e-10)


class TestGcPowerLaw:
    def test_identity_at_base_modulus(self):
        assert gc_power_law(20000.0) == pytest.approx(0.01, abs=0.0)

    def test_half_modulus(self):
        assert gc_power_law(10000.0) == pytest.approx(0.01 * 0.5**0.8, rel=1e-12)
        assert gc_power_law(10000.0) == pytest.approx(0.0057435, rel=1e-4)

    def test_double_modulus(self):
        assert gc_power_law(40000.0) == pytest.approx(0.0174110, rel=1e-4)

    def test_monotone_in_modulus(self):
        es = np.linspace(100.0, 1e5, 64)
        gcs = [gc_power_law(e) for e in es]
        assert all(b > a for a, b in zip(gcs, gcs[1:]))

    def test_rejects_nonpositive(self):
        with pytest.raises(MaterialError):
            gc_power_law(-1.0)


class TestLengthScale:
    def test_base_value(self):
        assert length_scale(20000.0, 0.01, 100.0) == pytest.approx(
            (27.0 / 256.0) * 0.02, rel=1e-14
        )

    def test_halving_strength_quadruples_length(self):
        l1 = length_scale(20000.0, 0.01, 100.0)
        l2 = length_scale(20000.0, 0.01, 50.0)
        assert l2 == pytest.approx(4.0 * l1, rel=1e-12)

    def test_constants_cancel(self):
        assert length_scale(1.0, 256.0 / 27.0, 1.0) == pytest.approx(1.0, rel=1e-14)

    def test_monotonicities(self):
        base = length_scale(20000.0, 0.01, 100.0)
        assert length_scale(40000.0, 0.01, 100.0) > base
        assert length_scale(20000.0, 0.02, 100.0) > base
        assert length_scale(20000.0, 0.01, 200.0) < base


def _analog_pair(shell=4.0, seed=11, mirror=True):
    block = (40.0, 40.0, 24.0)
    mesh = generate_box_tet_mesh(block, (8, 8, 5))
    screw_dir = np.array([0.0, -1.0, 0.0])
    screws = (
        ScrewCylinder(np.array([12.0, 40.0, 14.0]), screw_dir, 30.0, 3.25),
        ScrewCylinder(np.array([28.0, 40.0, 14.0]), screw_dir, 30.0, 3.25),
    )
    spec = VertebraAnalogSpec(
        block_lengths=np.asarray(block),
        shell_thickness=shell,
        screws=screws,
        seed=seed,
        mirror_axis=0 if mirror else None,
    )
    return mesh, spec


class TestVertebraAnalogAssignment:
    def test_screw_elements_get_titanium(self):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        scrw = mat.region == SCREW
        assert scrw.any()
        np.testing.assert_allclose(mat.E[scrw], 110000.0)
        np.testing.assert_allclose(mat.nu[scrw], 0.4)
        # element whose centroid lies on the screw axis (within its span)
        # is a screw element
        cent = mesh.node_coords[mesh.tets].mean(axis=1)
        on_axis = (
            (np.linalg.norm(cent[:, [0, 2]] - np.array([12.0, 14.0]), axis=1) < 1.0)
            & (cent[:, 1] >= 11.0)
        )
        assert on_axis.any()
        assert (mat.region[on_axis] == SCREW).all()

    def test_zero_shell_all_bone_trabecular(self):
        mesh, spec = _analog_pair(shell=0.0)
        mat = assign_vertebra_analog(mesh, spec)
        bone = mat.region != SCREW
        assert (mat.region[bone] == TRABECULAR).all()

    def test_every_element_exactly_one_region(self):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        assert set(np.unique(mat.region)) <= {TRABECULAR, CORTICAL, SCREW}
        assert mat.region.shape[0] == mesh.n_tets

    def test_seeded_reproducibility(self):
        mesh, spec = _analog_pair(seed=42)
        a = assign_vertebra_analog(mesh, spec)
        b = assign_vertebra_analog(mesh, spec)
        np.testing.assert_array_equal(a.E, b.E)
        np.testing.assert_array_equal(a.gc, b.gc)
        np.testing.assert_array_equal(a.region, b.region)

    def test_different_seed_changes_field(self):
        mesh, spec1 = _analog_pair(seed=1)
        _, spec2 = _analog_pair(seed=2)
        a = assign_vertebra_analog(mesh, spec1)
        b = assign_vertebra_analog(mesh, spec2)
        assert not np.array_equal(a.E, b.E)

    def test_bone_ranges_respected(self):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        trab = mat.region == TRABECULAR
        cort = mat.region == CORTICAL
        assert (mat.E[trab] >= spec.trabecular_e_min).all()
        assert (mat.E[trab] <= spec.trabecular_e_max).all()
        assert (mat.E[cort] >= 12000.0).all()
        assert (mat.E[cort] <= 14000.0).all()
        np.testing.assert_allclose(mat.nu[trab | cort], 0.3)

    def test_screws_marked_damage_immune(self):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        np.testing.assert_array_equal(mat.no_damage, mat.region == SCREW)

    def test_screw_missing_mesh_rejected(self):
        mesh, spec = _analog_pair()
        far = (ScrewCylinder(np.array([12.0, 80.0, 14.0]), np.array([0.0, 1.0, 0.0]),
                             30.0, 3.25),)
        bad = VertebraAnalogSpec(
            block_lengths=spec.block_lengths, shell_thickness=4.0, screws=far, seed=0,
        )
        with pytest.raises(MaterialError, match="screw"):
            assign_vertebra_analog(mesh, bad)

    def test_excessive_shell_rejected(self):
        mesh, spec = _analog_pair()
        bad = VertebraAnalogSpec(
            block_lengths=spec.block_lengths, shell_thickness=13.0, screws=spec.screws,
        )
        with pytest.raises(MaterialError, match="shell"):
            assign_vertebra_analog(mesh, bad)

    def test_lame_consistency(self):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        lam = mat.E * mat.nu / ((1 + mat.nu) * (1 - 2 * mat.nu))
        mu = mat.E / (2 * (1 + mat.nu))
        np.testing.assert_allclose(mat.lam, lam, rtol=1e-10)
        np.testing.assert_allclose(mat.mu, mu, rtol=1e-10)


class TestMaterialCsv:
    def test_roundtrip(self, tmp_path):
        mesh, spec = _analog_pair()
        mat = assign_vertebra_analog(mesh, spec)
        path = tmp_path / "materials.csv"
        write_material_csv(mat, path)
        back = read_material_csv(path)
        np.testing.assert_allclose(back.E, mat.E, rtol=0, atol=0)
        np.testing.assert_allclose(back.gc, mat.gc, rtol=0, atol=0)
        np.testing.assert_allclose(back.ell, mat.ell, rtol=0, atol=0)
        np.testing.assert_array_equal(back.region, mat.region)
        np.testing.assert_array_equal(back.no_damage, mat.no_damage)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(MaterialError, match="header"):
            read_material_csv(path)


def test_homogeneous_field_consistency():
    mat = homogeneous_field(10, E=210000.0, nu=0.3, Gc=2.7, ell=0.1)
    assert mat.n_elements == 10
    e_back = mat.mu * (3 * mat.lam + 2 * mat.mu) / (mat.lam + mat.mu)
    np.testing.assert_allclose(e_back, 210000.0, rtol=1e-12)
