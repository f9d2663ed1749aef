pub struct EpisodeState;
pub struct Histogram;
pub struct QNetParams;
