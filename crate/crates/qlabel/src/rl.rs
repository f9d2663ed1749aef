pub struct AgentConfig;
pub struct PolicyCheckpoint;
pub struct ReplayBuffer;
pub struct Transition;
