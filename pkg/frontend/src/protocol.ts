/** Wire types shared with the teleoperation server (JSON over websocket/HTTP). */

export interface PoseWire {
  position: [number, number, number];
  rotation: number[]; // 3x3 row-major, 9 entries
}

export interface RobotStateWire {
  robot_id: string;
  model: string;
  arm_q: number[];
  hand_q: number[];
  base_pose: PoseWire;
}

export interface ObjectStateWire {
  object_id: string;
  pose: PoseWire;
  mesh: string | null;
}

export interface ScenePayload {
  tick: number;
  robots: RobotStateWire[];
  objects: ObjectStateWire[];
}

export interface SceneMessage {
  type: "SCENE_STATE";
  session_id: string | null;
  timestamp_us: number;
  payload: ScenePayload;
}

export interface JointWire {
  name: string;
  type: "revolute" | "prismatic" | "fixed";
  parent: string;
  child: string;
  origin: PoseWire;
  axis: [number, number, number];
  mimic: [string, number, number] | null;
}

export interface LinkWire {
  name: string;
  mesh: string | null;
  spheres: { center: [number, number, number]; radius: number }[];
}

/** Kinematic digest served by GET /robots/{id}/description. */
export interface RobotDescription {
  robot_id: string;
  model: string;
  base_link: string;
  links: LinkWire[];
  joints: JointWire[];
  actuated_joints: string[];
  arm_joints: string[];
  hand_joints: string[];
  base_pose: PoseWire;
}

export function isSceneMessage(data: unknown): data is SceneMessage {
  return (
    typeof data === "object" &&
    data !== null &&
    (data as { type?: string }).type === "SCENE_STATE" &&
    typeof (data as { payload?: { tick?: unknown } }).payload?.tick === "number"
  );
}
