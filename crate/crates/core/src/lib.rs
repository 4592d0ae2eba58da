//! Programmable light curtains for robot work cells.
//!
//! The crate covers the whole loop: choosing PLC poses that see as much of
//! every robot footprint as possible ([`instrument`]), wrapping moving arms
//! in safety curtains ([`robotarm`], [`curtain`]), simulating sensor returns
//! ([`plcsim`]), turning returns into stop commands ([`monitor`]) and
//! rebuilding the scene from planar sweeps ([`recon`]).
//!
//! ```
//! use lightcurtain::geom2d::{convex_hull, Point2};
//!
//! let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.5, 0.2), Point2::new(0.0, 1.0)];
//! let hull = convex_hull(&pts).unwrap();
//! assert_eq!(hull.len(), 3);
//! ```

pub mod curtain;
pub mod error;
pub mod geom2d;
pub mod instrument;
pub mod io;
pub mod layout;
pub mod monitor;
pub mod plcsim;
pub mod recon;
pub mod robotarm;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
    #[doc = include_str!("../../../book/src/safety-curtains.md")]
    mod safety_curtains {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/monitoring.md")]
    mod monitoring {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
