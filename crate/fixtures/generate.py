import json, math, os
OUT=os.path.dirname(os.path.abspath(__file__))
def B(x0,y0,x1,y1): return {"min_x_m":x0,"min_y_m":y0,"max_x_m":x1,"max_y_m":y1}
def sq(i,cx,cy,w,prefix="r"):
    h=w/2; return {"id":f"{prefix}{i}","vertices_m":[[round(cx-h,4),round(cy-h,4)],[round(cx+h,4),round(cy-h,4)],[round(cx+h,4),round(cy+h,4)],[round(cx-h,4),round(cy+h,4)]]}
def rect_fp(w,h): return [[-w/2,-h/2],[w/2,-h/2],[w/2,h/2],[-w/2,h/2]]
def octagon(r): return [[round(r*math.cos((k+0.5)*math.pi/4),6),round(r*math.sin((k+0.5)*math.pi/4),6)] for k in range(8)]
def fixed(id,x,y,theta,fp,z0,z1,refl=1.0):
    return {"id":id,"footprint_m":fp,"z_min_m":z0,"z_max_m":z1,"reflectivity":refl,"trajectory":[{"t_s":0.0,"x_m":x,"y_m":y,"theta_rad":theta}]}
def save(name,d):
    with open(f"{OUT}/{name}.json","w") as f: json.dump(d,f,indent=2); f.write("\n")

def inst(name,notes,centers,m,w=0.8,grid=(50,50,20)):
    b=B(0,0,8,8)
    save(name,{"name":name,"notes":notes,"workspace":b,"robots":[sq(i+1,x,y,w) for i,(x,y) in enumerate(centers)],
               "plc_count":m,"grid":{"x_bins":grid[0],"y_bins":grid[1],"theta_bins":grid[2],"bounds":b}})
EST="Robot coordinates are illustrative estimates."
inst("grid_six","Six robots on a 3x2 grid spread to the corners of an 8x8 m cell, two PLCs. "+EST,
     [(x,y) for y in (1.0,7.0) for x in (1.0,4.0,7.0)],2)
inst("staggered_six","Six robots in two staggered rows of three, 8x8 m cell, two PLCs. "+EST,
     [(2.6,3.2),(4.0,3.2),(5.4,3.2),(3.3,4.8),(4.7,4.8),(6.1,4.8)],2)
inst("scattered_seven","Seven robots at scattered positions, 8x8 m cell, three PLCs. "+EST,
     [(1.5,1.8),(4.2,1.3),(6.6,2.4),(2.6,4.3),(5.3,4.6),(1.4,6.6),(4.4,6.9)],3)
R=2.6
inst("octagon_eight","Eight robots on a 2.6 m circle around the cell center, 8x8 m cell, four PLCs. "+EST,
     [(round(4+R*math.cos(k*math.pi/4),4),round(4+R*math.sin(k*math.pi/4),4)) for k in range(8)],4)
TRIO=[(3.3,3.5),(4.7,3.9),(4.0,4.9)]
inst("three_robots","Three robots in an 8x8 m cell, two PLCs, 50x50x20 pose grid. "+EST,TRIO,2,w=0.5)
inst("three_robots_coarse","The three-robot cell on a coarse 10x10x20 pose grid, small enough for exhaustive search. "+EST,TRIO,2,w=0.5,grid=(10,10,20))

# six-axis arm loosely sized like a small industrial arm
def arm_chain(x,y,yaw,z=0.7):
    links=[([0,0,1],[0,0,0.33]),([0,1,0],[0,0,0.26]),([0,1,0],[0.29,0,0]),([1,0,0],[0.05,0,0]),([0,1,0],[0.07,0,0]),([1,0,0],[0.03,0,0])]
    return {"base":{"translation_m":[x,y,z],"rpy_rad":[0,0,yaw]},
            "links":[{"axis":a,"translation_m":t,"rpy_rad":[0,0,0]} for a,t in links]}
def arm_script(phase,duration=30.0,step=2.5):
    keys=[]
    n=int(duration/step)
    for k in range(n+1):
        t=k*step
        s=math.sin(0.4*t+phase); c=math.cos(0.3*t+2*phase)
        keys.append({"angles_rad":[round(1.2*s,6),round(-0.6+0.4*c,6),round(0.9+0.5*s*c,6),round(0.8*c,6),round(0.6*s,6),round(0.5*c,6)],"t_s":t})
    return keys

tb=B(0,0,9.3,5.9)
bases=[(3.9,2.2),(5.4,2.2),(3.9,3.7),(5.4,3.7)]
robots=[sq(i+1,x,y,0.6,"arm") for i,(x,y) in enumerate(bases)]
arms=[{"robot_id":f"arm{i+1}","chain":arm_chain(x,y,math.atan2(2.95-y,4.65-x)),"trajectory":arm_script(0.7*i)} for i,(x,y) in enumerate(bases)]
walls=[fixed("wall_s",4.65,-0.05,0,rect_fp(9.5,0.1),0,2.5,0.8),fixed("wall_n",4.65,5.95,0,rect_fp(9.5,0.1),0,2.5,0.8),
       fixed("wall_w",-0.05,2.95,0,rect_fp(0.1,6.1),0,2.5,0.8),fixed("wall_e",9.35,2.95,0,rect_fp(0.1,6.1),0,2.5,0.8)]
tables=[fixed("bench_south",4.65,2.2,0,rect_fp(2.4,0.9),0,0.7,0.9),fixed("bench_north",4.65,3.7,0,rect_fp(2.4,0.9),0,0.7,0.9),
        fixed("rack",8.3,1.0,0,rect_fp(0.8,1.2),0,1.8,0.9),fixed("cart",1.4,4.6,0.4,rect_fp(0.9,0.6),0,1.0,0.9)]
save("testbed",{"name":"testbed","notes":"Four six-axis arms on two benches in a 9.3x5.9 m cell, two PLCs on the ceiling grid near the south-west corner. The second PLC carries a small calibration error. Arm dimensions and scripts are illustrative.",
  "workspace":tb,"robots":robots,"plc_count":2,"grid":{"x_bins":40,"y_bins":25,"theta_bins":20,"bounds":tb},
  "plc_poses":[{"x_m":0.5,"y_m":0.5,"theta_rad":0.55},{"x_m":1.8,"y_m":0.4,"theta_rad":0.75}],
  "calibration_errors":[{"x_m":0,"y_m":0,"theta_rad":0},{"x_m":0.03,"y_m":-0.02,"theta_rad":0.03}],
  "sensor":{"n_cols":256,"n_rows":160,"mount_height_m":1.2,"sweep_min_m":0.5,"sweep_max_m":8.0},
  "arms":arms,"obstacles":walls+tables})

# latency: a thin hand sweeps sideways just behind the guarded face
lb=B(-0.5,-2.0,3.0,2.0)
hand={"id":"hand","footprint_m":octagon(0.05),"z_min_m":0.0,"z_max_m":1.8,"reflectivity":0.9,
      "trajectory":[{"t_s":0.0,"x_m":1.125,"y_m":-1.6,"theta_rad":0.0},{"t_s":6.4,"x_m":1.125,"y_m":1.6,"theta_rad":0.0}]}
save("latency",{"name":"latency","notes":"One robot behind a guarded face at x = 1.1 m. A 10 cm wide hand sweeps sideways at 0.5 m/s just behind that face, so the curtain meets its visible side first in both monitoring modes.",
  "workspace":lb,"robots":[{"id":"cell","vertices_m":[[1.2,-0.3],[1.8,-0.3],[1.8,0.3],[1.2,0.3]]}],"plc_count":1,
  "grid":{"x_bins":10,"y_bins":10,"theta_bins":8,"bounds":lb},"plc_poses":[{"x_m":0,"y_m":0,"theta_rad":0}],
  "sensor":{"n_cols":128,"n_rows":48,"planar_depth_m":1.1,"max_range_m":8.0},"obstacles":[hand]})
save("interference",{"name":"interference","notes":"Latency cell without any intruder; only sensor interference can produce returns.",
  "workspace":lb,"robots":[{"id":"cell","vertices_m":[[1.2,-0.3],[1.8,-0.3],[1.8,0.3],[1.2,0.3]]}],"plc_count":1,
  "grid":{"x_bins":10,"y_bins":10,"theta_bins":8,"bounds":lb},"plc_poses":[{"x_m":0,"y_m":0,"theta_rad":0}],
  "sensor":{"n_cols":128,"n_rows":48,"planar_depth_m":1.1,"max_range_m":8.0}})

rb=B(0,0,6,5)
room=[fixed("wall_s",3.0,-0.05,0,rect_fp(6.2,0.1),0,2.4,0.9),fixed("wall_n",3.0,5.05,0,rect_fp(6.2,0.1),0,2.4,0.9),
      fixed("wall_w",-0.05,2.5,0,rect_fp(0.1,5.2),0,2.4,0.9),fixed("wall_e",6.05,2.5,0,rect_fp(0.1,5.2),0,2.4,0.9),
      fixed("box_a",2.0,2.6,0.3,rect_fp(0.8,0.6),0,0.8,1.0),fixed("box_b",4.1,3.4,-0.5,rect_fp(0.6,0.6),0,1.4,1.0),
      fixed("box_c",3.3,1.3,0.9,rect_fp(0.5,0.9),0,0.5,1.0)]
save("box_room",{"name":"box_room","notes":"A closed 6x5 m room with three boxes. Two PLCs on the south wall look north with overlapping views. The second PLC's calibrated pose is off by 4 cm / 3 cm / 4 degrees.",
  "workspace":rb,"robots":[{"id":"marker","vertices_m":[[2.9,4.4],[3.1,4.4],[3.1,4.6],[2.9,4.6]]}],"plc_count":2,
  "grid":{"x_bins":12,"y_bins":10,"theta_bins":8,"bounds":rb},
  "plc_poses":[{"x_m":2.2,"y_m":0.3,"theta_rad":round(math.pi/2,6)},{"x_m":3.8,"y_m":0.3,"theta_rad":round(math.pi/2,6)}],
  "calibration_errors":[{"x_m":0,"y_m":0,"theta_rad":0},{"x_m":0.04,"y_m":-0.03,"theta_rad":round(math.radians(4),6)}],
  "sensor":{"n_cols":256,"n_rows":120,"mount_height_m":1.0,"sweep_min_m":0.3,"sweep_max_m":7.5},"obstacles":room})
