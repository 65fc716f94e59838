//! Event camera simulation with bandwidth-limited pixels.
//!
//! Each pixel's photoreceptor, source follower and differencing stages are
//! modelled as a fourth-order filter whose poles move with illumination. The
//! crate provides the filter ([`filter_engine`]), its continuous-time model
//! ([`pixel_model`]), threshold event generation ([`event_core`]), a
//! multi-threaded frame-to-event simulator ([`simulator`]) and loss/colour
//! correction utilities for reconstruction from events ([`recon_tools`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod event_core;
pub mod filter_engine;
pub mod numerics;
pub mod pixel_model;
pub mod recon_tools;
pub mod simulator;

pub use error::{Error, Result};
pub use event_core::{EventCameraConfig, Event, Pixel, Polarity, TraceSample};
pub use filter_engine::{DiscreteStep, FilterState, InputSequence, WeightSequence};
pub use numerics::Matrix;
pub use pixel_model::PixelBandwidthParams;
pub use simulator::{EventStream, SceneSource, SimConfig, SimOptions, StreamHeader};
