//! Indoor ultra-wideband positioning simulation for an aircraft cabin.
//!
//! The crate models a narrow-body cabin as axis-aligned boxes, classifies
//! anchor-to-tag visibility, draws range measurements, estimates positions
//! with a discrete grid Bayes filter and summarizes the errors. A boarding
//! simulation supplies moving tags and passenger bodies.

pub mod boarding;
pub mod config;
pub mod dataio;
pub mod gridfilter;
pub mod metrics;
pub mod pipeline;
pub mod ranging;
pub mod scene;
pub mod visibility;
