//! Classical fourth-order Runge–Kutta on the density operator, with the
//! generator evaluated at the true stage times. Used as a cross-check of the
//! exponential integrator; integrals use the plain trapezoid rule with k_b
//! sampled on the grid.

use super::engine::{Engine, StepGrid};
use super::exponential::{initial_density, Integrals};
use super::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{radial_trajectory, ModulationSpec, RadicalPairModel};

pub(crate) fn run(
    engine: &Engine,
    model: &RadicalPairModel,
    modulation: &ModulationSpec,
    grid: &StepGrid,
    traj: &mut Trajectory,
) -> Result<Integrals> {
    let d = engine.d;
    let h = grid.dt;
    let generator_at = |t: f64| -> Result<(CMat, f64)> {
        let r = radial_trajectory(modulation, &model.geometry, t)?;
        engine.generator(r)
    };

    let mut rho = initial_density(engine);
    let mut stage = CMat::zeros(d, d);
    let mut k = [CMat::zeros(d, d), CMat::zeros(d, d), CMat::zeros(d, d), CMat::zeros(d, d)];
    let mut tmp = CMat::zeros(d, d);
    let mut r_int = CMat::zeros(d, d);
    let mut singlet_yield = 0.0;

    traj.push(engine, modulation, model, 0.0, &rho)?;
    let (mut m_now, mut kb_now) = generator_at(0.0)?;
    let mut trace = 1.0;
    let mut n = 0;
    while grid.proceed(n, trace) {
        let t = n as f64 * h;
        let (m_mid, _) = generator_at(t + 0.5 * h)?;
        let (m_end, kb_end) = generator_at(t + h)?;

        engine.liouvillian_into(&m_now, &rho, &mut k[0], &mut tmp);
        stage.copy_from(&rho);
        stage.add_scaled(0.5 * h, &k[0]);
        engine.liouvillian_into(&m_mid, &stage, &mut k[1], &mut tmp);
        stage.copy_from(&rho);
        stage.add_scaled(0.5 * h, &k[1]);
        engine.liouvillian_into(&m_mid, &stage, &mut k[2], &mut tmp);
        stage.copy_from(&rho);
        stage.add_scaled(h, &k[2]);
        engine.liouvillian_into(&m_end, &stage, &mut k[3], &mut tmp);

        let p_now = engine.singlet_population(&rho);
        r_int.add_scaled(0.5 * h, &rho);
        stage.copy_from(&rho);
        stage.add_scaled(h / 6.0, &k[0]);
        stage.add_scaled(h / 3.0, &k[1]);
        stage.add_scaled(h / 3.0, &k[2]);
        stage.add_scaled(h / 6.0, &k[3]);
        std::mem::swap(&mut rho, &mut stage);
        r_int.add_scaled(0.5 * h, &rho);
        let p_next = engine.singlet_population(&rho);
        singlet_yield += 0.5 * h * (kb_now * p_now + kb_end * p_next);

        m_now = m_end;
        kb_now = kb_end;
        n += 1;
        trace = rho.trace().re;
        traj.push(engine, modulation, model, n as f64 * h, &rho)?;
    }
    r_int.hermitize();
    traj.finish(n, trace);
    if trace >= grid.epsilon && engine.kf == 0.0 {
        return Err(Error::Horizon {
            trace,
            t_max: grid.t_max,
        });
    }
    Ok(Integrals {
        r: r_int,
        singlet_yield,
    })
}
