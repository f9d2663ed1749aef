pub struct MlpParams;
pub struct TrainConfig;
pub fn average_precision() {}
pub fn score() {}
pub fn train_classifier() {}
