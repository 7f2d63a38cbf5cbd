pub mod astro;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod scenario;
pub mod pki;
pub mod experiments;
pub mod reporting;
