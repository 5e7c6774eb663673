pub mod basis;
pub mod error;
pub mod inference;
pub mod pipeline;
pub mod point_process;
pub mod propensity;
pub mod regression;
pub mod spatial;
pub mod weights;
pub mod io;
pub mod sim;

pub use basis::{BasisKind, BasisSpec, ColumnFn};
pub use error::{Error, Result};
pub use inference::{HeterogeneityTest, Interval, QMode, VarianceBound};
pub use pipeline::{estimate_pair, Estimate, EstimationOptions, PairData};
pub use point_process::{IntensitySurface, SeedStream};
pub use propensity::{CovariateLayer, CovariateStack, FitReport, ModelDocument, PropensityModel};
pub use regression::{CateFit, RankPolicy};
pub use spatial::{Location, ModeratorKind, ModeratorPanel, PixelGrid, PointPattern, Raster, RasterShape, Window};
pub use weights::{InterventionSpec, WeightSeries, WeightingMode};
