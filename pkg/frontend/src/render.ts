/** three.js rendering of robots from their kinematic digests.
 *
 * Links are drawn from the collision-sphere model (primitive fallback; mesh
 * assets are not fetched), with thin bones connecting joint frames so hands
 * without spheres stay visible. One group per (robot, link), repositioned in
 * place on every scene update.
 */
import * as THREE from "three";
import { forwardKinematics, jointValues } from "./kinematics.js";
import { Transform } from "./math.js";
import { RobotDescription } from "./protocol.js";
import { RobotView } from "./scene.js";

const ROBOT_COLORS = [0x4d7fd1, 0xd1884d, 0x5fae6b, 0xb05fae];

function applyTransform(obj: THREE.Object3D, t: Transform): void {
  const m = t.rotation;
  const mat = new THREE.Matrix4();
  mat.set(
    m[0], m[1], m[2], t.translation[0],
    m[3], m[4], m[5], t.translation[1],
    m[6], m[7], m[8], t.translation[2],
    0, 0, 0, 1,
  );
  obj.matrixAutoUpdate = false;
  obj.matrix.copy(mat);
}

export class RobotVisual {
  readonly root = new THREE.Group();
  private readonly linkGroups = new Map<string, THREE.Group>();
  private readonly bones: { line: THREE.Line; parent: string; child: string }[] = [];

  constructor(private readonly desc: RobotDescription, colorIndex: number) {
    const color = ROBOT_COLORS[colorIndex % ROBOT_COLORS.length];
    const material = new THREE.MeshStandardMaterial({ color });
    for (const link of desc.links) {
      const group = new THREE.Group();
      for (const sphere of link.spheres) {
        const mesh = new THREE.Mesh(
          new THREE.SphereGeometry(sphere.radius, 12, 10), material);
        mesh.position.set(...sphere.center);
        group.add(mesh);
      }
      this.linkGroups.set(link.name, group);
      this.root.add(group);
    }
    const boneMaterial = new THREE.LineBasicMaterial({ color });
    for (const joint of desc.joints) {
      const geometry = new THREE.BufferGeometry().setFromPoints(
        [new THREE.Vector3(), new THREE.Vector3()]);
      const line = new THREE.Line(geometry, boneMaterial);
      this.root.add(line);
      this.bones.push({ line, parent: joint.parent, child: joint.child });
    }
  }

  /** Reposition all link groups; values come straight off the wire. */
  update(view: RobotView): void {
    const poses = forwardKinematics(
      this.desc, jointValues(this.desc, view.armQ, view.handQ));
    for (const [name, group] of this.linkGroups) {
      const pose = poses.get(name);
      if (pose) applyTransform(group, pose);
    }
    for (const bone of this.bones) {
      const a = poses.get(bone.parent);
      const b = poses.get(bone.child);
      if (!a || !b) continue;
      const positions = bone.line.geometry.getAttribute("position");
      positions.setXYZ(0, ...a.translation);
      positions.setXYZ(1, ...b.translation);
      positions.needsUpdate = true;
    }
  }
}

export class SceneRenderer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly robots = new Map<string, RobotVisual>();
  private readonly placeholders = new Map<string, THREE.Object3D>();

  constructor(canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(
      50, canvas.clientWidth / Math.max(canvas.clientHeight, 1), 0.01, 50);
    this.camera.position.set(1.6, -1.6, 1.2);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(0.4, 0, 0.5);
    this.scene.background = new THREE.Color(0x14161a);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(2, -3, 4);
    this.scene.add(key);
    this.scene.add(new THREE.GridHelper(3, 30, 0x333a44, 0x23272e)
      .rotateX(Math.PI / 2));
  }

  ensureRobot(desc: RobotDescription): RobotVisual {
    let visual = this.robots.get(desc.robot_id);
    if (!visual) {
      this.removePlaceholder(desc.robot_id);
      visual = new RobotVisual(desc, this.robots.size);
      this.robots.set(desc.robot_id, visual);
      this.scene.add(visual.root);
    }
    return visual;
  }

  /** Wireframe stand-in shown until the robot's description arrives. */
  showPlaceholder(robotId: string): void {
    if (this.robots.has(robotId) || this.placeholders.has(robotId)) return;
    const box = new THREE.Mesh(
      new THREE.BoxGeometry(0.12, 0.12, 0.3),
      new THREE.MeshBasicMaterial({ color: 0x777777, wireframe: true }));
    box.position.set(0, 0, 0.15);
    this.placeholders.set(robotId, box);
    this.scene.add(box);
  }

  private removePlaceholder(robotId: string): void {
    const box = this.placeholders.get(robotId);
    if (box) {
      this.scene.remove(box);
      this.placeholders.delete(robotId);
    }
  }

  updateRobot(desc: RobotDescription, view: RobotView): void {
    this.ensureRobot(desc).update(view);
  }

  resize(width: number, height: number): void {
    this.renderer.setSize(width, height, false);
    this.camera.aspect = width / Math.max(height, 1);
    this.camera.updateProjectionMatrix();
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }
}
