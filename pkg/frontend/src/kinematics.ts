/** Client-side forward kinematics over the robot description digest.
 *
 * The server streams joint values only; link poses are recomputed here from
 * the description fetched once at connect, keeping scene messages small.
 */
import {
  Mat3, Transform, Vec3, axisAngle, compose, matVec, vecAdd, vecScale,
} from "./math.js";
import { PoseWire, RobotDescription } from "./protocol.js";

export function poseFromWire(pose: PoseWire): Transform {
  return { rotation: pose.rotation as Mat3, translation: pose.position as Vec3 };
}

/** Assemble the full actuated-joint value map from arm and hand vectors. */
export function jointValues(
  desc: RobotDescription,
  armQ: number[],
  handQ: number[],
): Map<string, number> {
  const values = new Map<string, number>();
  for (const name of desc.actuated_joints) values.set(name, 0);
  desc.arm_joints.forEach((name, i) => values.set(name, armQ[i] ?? 0));
  desc.hand_joints.forEach((name, i) => values.set(name, handQ[i] ?? 0));
  return values;
}

/** World pose of every link: base_pose o chain of origins and joint motions.
 *
 * Joints arrive topologically sorted from the server. Mimic joints take
 * multiplier * driver + offset, matching the server's parse-time resolution.
 */
export function forwardKinematics(
  desc: RobotDescription,
  values: Map<string, number>,
): Map<string, Transform> {
  const poses = new Map<string, Transform>();
  poses.set(desc.base_link, poseFromWire(desc.base_pose));
  for (const joint of desc.joints) {
    const parent = poses.get(joint.parent);
    if (!parent) {
      throw new Error(`joint ${joint.name} visited before its parent link`);
    }
    const frame = compose(parent, poseFromWire(joint.origin));
    if (joint.type === "fixed") {
      poses.set(joint.child, frame);
      continue;
    }
    let value = values.get(joint.name) ?? 0;
    if (joint.mimic) {
      const [driver, mult, offset] = joint.mimic;
      value = mult * (values.get(driver) ?? 0) + offset;
    }
    if (joint.type === "revolute") {
      poses.set(joint.child, compose(frame, {
        rotation: axisAngle(joint.axis, value),
        translation: [0, 0, 0],
      }));
    } else {
      const worldAxis = matVec(frame.rotation, joint.axis);
      poses.set(joint.child, {
        rotation: frame.rotation,
        translation: vecAdd(frame.translation, vecScale(worldAxis, value)),
      });
    }
  }
  return poses;
}
