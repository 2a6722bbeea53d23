//! Fixtures shared by the benchmarks.

use foldmenu::competition::{FirmProfile, Game};
use foldmenu::{generate_panel, DgpConfig, Product, ProductLine, SyntheticPanel};

/// Default process with `n_markets` markets and the given draw counts.
pub fn panel(n_markets: usize, interval_draws: usize, normal_draws: usize) -> SyntheticPanel {
    generate_panel(&DgpConfig {
        n_markets,
        interval_draws,
        normal_draws,
        ..DgpConfig::default()
    })
    .expect("default process is valid")
}

/// `n_firms` firms with `len` products each on a deterministic grid of
/// margins, prices and utilities.
pub fn game(n_firms: usize, len: usize) -> Game {
    let firms = (0..n_firms)
        .map(|f| {
            let products = (0..len)
                .map(|k| {
                    let margin = 3.0 - 2.5 * k as f64 / len as f64 + 0.1 * f as f64;
                    let price = 1.0 + 0.6 * (len - k) as f64;
                    Product::new(format!("f{f}p{k}"), margin, price).expect("positive grid")
                })
                .collect();
            let gamma = (0..len).map(|k| 1.0 + 0.3 * ((k * 7 + f * 3) % 5) as f64).collect();
            FirmProfile::new(format!("f{f}"), ProductLine::new(products).expect("sorted grid"), gamma)
                .expect("matching sizes")
        })
        .collect();
    Game::logit(firms, 0.7).expect("valid game")
}
