pub mod beam_oracle;
pub mod gradcheck;
pub mod metric_oracle;
