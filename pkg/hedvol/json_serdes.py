from abc import abstractmethod
import json
import logging

import numpy as np


class JSONSerDes:
    '''A base class that adds hooks for JSON de/serialization'''

    JSON_CLASSNAME = "JSONSerDes"

    def copy(self):
        '''Does a value copy of our object

        This does a trivial/naive JSON round-trip to get a copy of
        the object.
        '''
        return self.__class__.from_json_obj(
            json.loads(json.dumps(self.to_json_obj(), default=HedvolJSONEncoder().default)))

    @abstractmethod
    def to_json_obj(self):
        return vars(self)

    def to_json(self):
        return json.dumps(self.to_json_obj(), default=HedvolJSONEncoder().default)

    @classmethod
    @abstractmethod
    def from_json_obj(cls, json_obj):
        pass

    @classmethod
    def _check_json_obj(cls, obj):
        '''(internal) Raise ValueError unless obj was written by this class'''
        if not isinstance(obj, dict) or "_json_classname" not in obj:
            logging.debug(f'Got a non-JSON-SerDes object in {cls.__name__}!')
            raise ValueError(f'Got invalid object!')

        if obj["_json_classname"] != cls.JSON_CLASSNAME:
            logging.debug(f'Got a value of class {obj["_json_classname"]} in {cls.__name__}!')
            raise ValueError(f'Got invalid object!')


class HedvolJSONEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, JSONSerDes):
            return obj.to_json_obj()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        return json.JSONEncoder.default(self, obj)


DECODERS = {}


def hedvol_json_decoder(obj):
    try:
        clsname = obj["_json_classname"]
    except KeyError:
        # not one of ours
        return obj

    if clsname not in DECODERS:
        # Subclasses may have been imported since the last scan.
        def _rec_add(cls_head):
            logging.debug('Registered JSON loader "%s" to %s' % (cls_head.JSON_CLASSNAME, cls_head))
            DECODERS[cls_head.JSON_CLASSNAME] = cls_head.from_json_obj
            for cls in cls_head.__subclasses__():
                _rec_add(cls)
        _rec_add(JSONSerDes)

    if clsname not in DECODERS:
        logging.error(f'Got unknown JSON classname: {clsname}')
        logging.debug(f'Known JSON decoders: {DECODERS}')
        raise ValueError(f'Got unknown JSON classname: {clsname}')

    return DECODERS[clsname](obj)


def dump_json(obj, path):
    with open(path, "w+") as f:
        json.dump(obj, f, default=HedvolJSONEncoder().default, indent=2, sort_keys=True)


def load_json(path):
    with open(path, "r") as f:
        return json.load(f)
