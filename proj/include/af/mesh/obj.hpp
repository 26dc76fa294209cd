// Wavefront OBJ I/O (v/f records, triangles only). Offsets are folded into
// the written positions. Region labels travel in a "<mesh>.regions" sidecar.
#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "af/mesh/trimesh.hpp"

namespace af {

inline void save_obj(const std::string& path, const TriMesh& mesh) {
    FILE* f = fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("obj: cannot write " + path);
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        Vec3 p = mesh.effective(i);
        fprintf(f, "v %.17g %.17g %.17g\n", p.x, p.y, p.z);
    }
    for (const auto& t : mesh.faces)
        fprintf(f, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    fclose(f);
    if (!mesh.region_labels.empty()) {
        std::ofstream rf(path + ".regions");
        for (int r : mesh.region_labels) rf << r << "\n";
    }
}

inline TriMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("obj: cannot open " + path);
    TriMesh mesh;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.size() >= 2 && line[0] == 'v' && (line[1] == ' ' || line[1] == '\t')) {
            Vec3 p;
            if (sscanf(line.c_str() + 1, "%lf %lf %lf", &p.x, &p.y, &p.z) != 3)
                throw std::runtime_error("obj: " + path + ":" + std::to_string(lineno) + ": bad vertex line");
            mesh.vertices.push_back(p);
        } else if (line.size() >= 2 && line[0] == 'f' && (line[1] == ' ' || line[1] == '\t')) {
            // Face entries may carry /vt/vn suffixes; only the vertex index is kept.
            int idx[4];
            int n = 0;
            const char* s = line.c_str() + 1;
            while (*s) {
                while (*s == ' ' || *s == '\t') ++s;
                if (!*s || *s == '\r') break;
                char* end = nullptr;
                long v = strtol(s, &end, 10);
                if (end == s)
                    throw std::runtime_error("obj: " + path + ":" + std::to_string(lineno) + ": bad face entry");
                if (n >= 4)
                    throw std::runtime_error("obj: " + path + ":" + std::to_string(lineno) + ": triangles only");
                if (n < 4) idx[n] = int(v);
                ++n;
                s = end;
                while (*s && *s != ' ' && *s != '\t') ++s; // skip /vt/vn part
            }
            if (n != 3)
                throw std::runtime_error("obj: " + path + ":" + std::to_string(lineno) + ": triangles only");
            std::array<int, 3> t;
            for (int c = 0; c < 3; ++c) {
                long v = idx[c];
                if (v < 0) v = long(mesh.vertices.size()) + v + 1; // negative = relative
                if (v < 1)
                    throw std::runtime_error("obj: " + path + ":" + std::to_string(lineno) + ": index out of range");
                t[c] = int(v) - 1; // OBJ is 1-based
            }
            mesh.faces.push_back(t);
        }
        // other record types ignored
    }
    mesh.offsets.assign(mesh.vertices.size(), Vec3{0, 0, 0});
    std::ifstream rf(path + ".regions");
    if (rf) {
        int r;
        while (rf >> r) mesh.region_labels.push_back(r);
        if (mesh.region_labels.size() != mesh.vertices.size())
            throw std::runtime_error("obj: " + path + ".regions count mismatch");
    } else {
        mesh.region_labels.assign(mesh.vertices.size(), 0);
    }
    mesh.validate();
    return mesh;
}

} // namespace af
