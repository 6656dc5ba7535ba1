/** Viewer-side scene state: strictly increasing ticks, no interpolation.
 *
 * Rendered joint values are exactly the received values; stale or duplicate
 * ticks are dropped so every window shows a monotone sequence of states.
 */
import { RobotDescription, ScenePayload, SceneMessage, isSceneMessage } from "./protocol.js";

export interface RobotView {
  robotId: string;
  model: string;
  armQ: number[];
  handQ: number[];
}

export class ViewerScene {
  latestTick = -1;
  lastTimestampUs = -1;
  readonly robots = new Map<string, RobotView>();
  readonly descriptions = new Map<string, RobotDescription>();
  /** Robots seen in a scene message with no description yet (to be fetched). */
  readonly pendingDescriptions = new Set<string>();

  addDescription(desc: RobotDescription): void {
    this.descriptions.set(desc.robot_id, desc);
    this.pendingDescriptions.delete(desc.robot_id);
  }

  /** Apply one SCENE_STATE payload; returns false for stale/duplicate ticks. */
  applySceneState(message: SceneMessage | unknown): boolean {
    if (!isSceneMessage(message)) return false;
    const payload: ScenePayload = message.payload;
    if (payload.tick <= this.latestTick) return false;
    this.latestTick = payload.tick;
    this.lastTimestampUs = message.timestamp_us;
    for (const robot of payload.robots) {
      this.robots.set(robot.robot_id, {
        robotId: robot.robot_id,
        model: robot.model,
        armQ: robot.arm_q,
        handQ: robot.hand_q,
      });
      if (!this.descriptions.has(robot.robot_id)) {
        this.pendingDescriptions.add(robot.robot_id);
      }
    }
    for (const id of [...this.robots.keys()]) {
      if (!payload.robots.some((r) => r.robot_id === id)) this.robots.delete(id);
    }
    return true;
  }
}
