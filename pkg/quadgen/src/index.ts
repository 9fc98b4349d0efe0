export { Xoshiro256, SplitMix64 } from "./rng";
export { Dataset, MAGIC, readDataset, writeDataset, datasetLength } from "./koopds";
export { parseUrdf, RobotSpec, JointSpec, LinkSpec } from "./urdf";
export { buildRobot, QuadRobot, CONTROL_DT, PHYSICS_SUBSTEPS } from "./robot";
export { collect, CollectSummary, sampleCommands } from "./collect";
