//! Shared fixtures for the `kernels` benchmarks.

use evblur::simulator::{MovingBar, SceneSource};
use evblur::Matrix;

/// The 6x6 block matrix the discretization exponentiates, at a mid-range
/// operating point and a 10 us step.
pub fn block_matrix() -> Matrix {
    let params = evblur::PixelBandwidthParams::default();
    let m = params.continuous_matrices(params.effective_log_radiance(200.0));
    let dt = 1e-5;
    let mut z = Matrix::zeros(6, 6);
    z.view_mut((0, 0), (4, 4)).copy_from(&(&m.a * dt));
    z.view_mut((0, 4), (4, 1)).copy_from(&(&m.b * dt));
    z[(4, 5)] = 1.0;
    z
}

pub fn small_bar(size: u16) -> SceneSource {
    let spec = format!("width={size},height={size},bar=4,speed=800,duration=0.02");
    SceneSource::MovingBar(MovingBar::from_spec(&spec).expect("valid bar"))
}
